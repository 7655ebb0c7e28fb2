from .export import build_trunk, check_output_shapes, export, verify_parity

__all__ = ["build_trunk", "check_output_shapes", "export", "verify_parity"]
