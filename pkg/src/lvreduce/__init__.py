"""Center-manifold reduction and averaging of prey-predator dynamics with fast periodic migration."""

__version__ = "0.1.0"
