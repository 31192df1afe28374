"""Receding-horizon operation: day state, dispatch policies and the simulator."""
