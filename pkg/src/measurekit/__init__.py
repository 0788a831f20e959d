"""measurekit: exact conditioning and Bayes-formula validity on computable measures."""

__version__ = "0.1.0"
