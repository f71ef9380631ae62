"""viewfinder: find, classify, and reduce candidate views over table corpora."""

__version__ = "0.1.0"
