"""Multiple-model multiple imputation: nonignorable sensitivity analysis by
nesting ignorable imputations within a distribution of missingness models."""

__version__ = "0.1.0"
