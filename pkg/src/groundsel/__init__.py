"""Ground-model selection from surface-observed seismic motion."""
