"""Single-machine emulation of a micro-operator edge stack.

Subsystems: GTP-U user-plane codec (`gtp`), collapsed EPC control plane
(`core`), calibrated radio link model (`link`), edge service fabric
(`fabric`), push-to-deploy pipeline (`pipeline`), and the constant-rate HTTP
benchmark harness (`bench`).
"""

__version__ = "0.1.0"
