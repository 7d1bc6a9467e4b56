# Tests for the DendSOM library and experiment runner
