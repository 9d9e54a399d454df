"""Center/partner message exchange: schemas, transports and the two event loops.

Submodules are imported directly (``dcox.protocol.center`` and so on) so
that the table writer can reuse the value formatting without pulling in
the orchestration code.
"""
