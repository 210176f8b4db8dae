from .evaluation import EvalReport, evaluate, exact_match

__all__ = ["EvalReport", "evaluate", "exact_match"]
