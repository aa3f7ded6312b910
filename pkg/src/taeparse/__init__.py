"""Copy-attention seq2seq semantic parsing toolkit with monolingual target autoencoding."""

__version__ = "0.1.0"
