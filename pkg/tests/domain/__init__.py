"""Package marker for domain tests."""
