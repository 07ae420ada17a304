"""Package marker for utils tests."""
