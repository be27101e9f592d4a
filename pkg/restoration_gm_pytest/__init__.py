"""pytest plugin for restoration-gm."""
