"""Three-phase unbalanced power flow with phase-switching devices."""
