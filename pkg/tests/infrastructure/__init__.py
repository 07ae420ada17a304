"""Package marker for infrastructure tests."""
