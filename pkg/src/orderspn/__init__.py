"""OrderSPN: sum-product-network posteriors over DAG structures."""

__version__ = "0.1.0"
