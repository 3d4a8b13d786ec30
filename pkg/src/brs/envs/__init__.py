from . import coin, ipd  # noqa: F401
