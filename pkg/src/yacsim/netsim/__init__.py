"""Deterministic discrete-event network simulator for YAC peers.

Import from the submodules directly; :mod:`yacsim.event_dispatcher` needs
:mod:`yacsim.netsim.trace` before the simulator itself can be loaded.
"""
