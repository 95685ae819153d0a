"""Privacy-preserving behavioral authentication with sparse random projection."""

from ppba.dataio import Dataset, Profile, SplitSpec
from ppba.projection import ProjectedProfile, RandomMatrix

__all__ = ["Dataset", "Profile", "ProjectedProfile", "RandomMatrix", "SplitSpec"]
__version__ = "0.1.0"
