"""Gradient-free personalized federated learning via dual-stream least squares.

Clients solve local ridge regressions over random-feature projections and
upload only regularized gram matrices plus local solutions; the server
fuses these one-shot uploads, in any arrival order, into a global primary
stream that exactly equals centralized ridge regression on the pooled data.
Each client then fits a private refinement stream to its local residual and
blends the two at inference time.
"""

from .client import (
    ClientHyper,
    LocalKnowledge,
    PersonalModel,
    compute_local_primary,
    compute_refinement,
    local_accuracy,
    predict,
)
from .data import (
    LabeledDataset,
    PartitionSpec,
    dirichlet_partition,
    one_hot,
    split_train_test,
    synthetic_dataset,
)
from .errors import (
    ApflError,
    ConfigError,
    DataError,
    DuplicateClientError,
    FileFormatError,
    FramingError,
    IncompleteFusionError,
    NotPositiveDefiniteError,
    PartitionError,
    ProtocolError,
    RoundError,
    ShapeError,
)
from .features import (
    Activation,
    FileBackedExtractor,
    IdentityExtractor,
    ProjectionHead,
    RandomLinearExtractor,
    activate,
    make_head,
    read_feature_file,
    read_label_file,
    write_feature_file,
    write_label_file,
)
from .linalg import matmul, ridge_solve, spd_solve
from .seeding import derive_seed
from .server import (
    FusionState,
    centralized_oracle,
    finalize,
    fuse,
    fuse_all,
    init_fusion,
)
from .transport import FederatedClient, FusionServer, RoundResult, run_round

__version__ = "0.1.0"
