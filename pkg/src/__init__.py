"""
Cell-free access - uplink simulator for scalable cell-free massive MIMO with
initial access, pilot assignment, fractional power control and (partial)
large-scale fading decoding.
"""
