"""Raw frames to fluctuation maps, spectra, correlation functions and DSF."""
