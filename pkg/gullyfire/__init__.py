"""Gullyfire: a nonlocal bushfire model in a narrow curved gully, its reduced axis model, and the harness that measures one against the other."""
