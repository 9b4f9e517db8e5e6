"""Wavenumber-domain channel covariance estimation with weighted vMF-mixture EM."""
from .lattice import ApertureConfig, LatticeEllipse, WavenumberIndex, build_lattice, index_to_angles
from .vmf import VmfCluster, VmfMixture, random_scene
from .channel import VarianceProfile, build_dictionary, covariance_nmse, sample_channel, variance_profile
from .observation import SampleSet, build_selection, observe, sample_values
from .wd_em import EmSettings, FitReport, run

__all__ = [
    "ApertureConfig", "LatticeEllipse", "WavenumberIndex", "build_lattice", "index_to_angles",
    "VmfCluster", "VmfMixture", "random_scene",
    "VarianceProfile", "build_dictionary", "covariance_nmse", "sample_channel", "variance_profile",
    "SampleSet", "build_selection", "observe", "sample_values",
    "EmSettings", "FitReport", "run",
]
