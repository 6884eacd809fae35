from .kernel import HostError, HostKernel

__all__ = ["HostError", "HostKernel"]
