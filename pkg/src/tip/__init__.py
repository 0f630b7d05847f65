"""TIP: a declarative intent protocol for heterogeneous device networks.

Nodes advertise capabilities, requesters submit intents; the engine
resolves providers through dual-phase discovery (local-link plus DHT),
ranks them with multi-criteria scoring, establishes dual-signed contracts
over an authenticated encrypted session, and bridges schema mismatches with
sandboxed WebAssembly adapters compiled from TOML descriptors.
"""

__version__ = "0.1.0"
