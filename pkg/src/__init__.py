# ToCap - Voxel Capacitance Extraction
