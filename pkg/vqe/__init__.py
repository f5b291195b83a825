# Compressed-video quality enhancement: codec simulation, partition-guided maps, guided enhancement network.
