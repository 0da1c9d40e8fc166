"""prada: a policy-aware key-value store on a deterministic cluster simulator.

Clients attach data handling requirements (storage location, encryption
level, maximum lifetime, ...) to individual items. An indirection layer
routes each item to cluster nodes whose advertised capabilities satisfy
the requirements, while data without requirements takes the unmodified
storage path.
"""

__version__ = "0.1.0"
