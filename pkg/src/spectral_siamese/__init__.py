"""Spectral shape descriptors and Siamese embeddings for non-rigid shape matching.

The pipeline runs mesh -> Laplace-Beltrami eigenpairs -> GPS/HKS/WKS
descriptors -> learned 15-d embedding -> nearest-neighbour matching.
"""

from .corpus import Corpus, Model, PairBatch, build_corpus, compute_corpus_descriptors, sample_batch, \
    synth_corpus
from .descriptors import DescriptorField, compute_descriptor, gps, hks, load_descriptor, \
    save_descriptor, wks
from .errors import SpectralSiameseError
from .intrinsic_dim import DimReport, estimate_intrinsic_dimension
from .laplace import LaplaceSpectrum, build_operators, compute_spectrum, mesh_spectrum
from .matching import MatchReport, classification_metrics, count_correct_matches, embed_field, \
    match_nearest, matching_accuracy
from .mesh import TriMesh, geodesic_distances, icosphere, load_mesh, save_mesh, shape_diameter
from .siamese import MlpParams, TrainConfig, forward, init_params, load_model, save_model, train

__version__ = "0.1.0"
