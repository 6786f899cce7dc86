"""Desk-scale measurement framework for P2P IoT botnets (Hajime / Mozi style).

Submodules:
    core       -- observation records, CSV log format, AS/country enrichment
    protocols  -- KRPC codec, Mozi ID generator, Hajime infohash + handshake
    simnet     -- deterministic discrete-event population simulator
    crawler    -- dual-loop (discovery / tracking) crawler
    analytics  -- size, overlap, lifetime, churn and reply-ratio metrics
    cli        -- ``botmesh`` command line entry point
"""

__version__ = "0.1.0"
