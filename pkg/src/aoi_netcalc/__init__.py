"""Statistical age-of-information bounds for parallel systems, plus a validating simulator."""
