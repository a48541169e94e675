"""Two-server private and verifiable decision-tree evaluation.

The model provider and the client each send a single encrypted upload;
the two servers evaluate locally and answer with one message apiece,
never talking to each other. Verification is a one-time MAC the client
checks against proof shares.
"""

from .compare import (
    EncryptedBits,
    FixedPointSpec,
    encrypt_bits,
    plain_compare,
    plain_compare_trace,
    plain_equal,
    scale_fixed,
    seq,
    set_membership,
    sic,
    unscale_fixed,
)
from .errors import (
    ConversionError,
    DecodeError,
    DomainError,
    HssTreeError,
    IngestionError,
    ProtocolMisuseError,
    SetupError,
    TransportError,
    UnsupportedModulusError,
    VerificationRejected,
)
from .hss import (
    Ciphertext,
    EvalKey,
    KeyMaterial,
    MemoryValue,
    MetricsLedger,
    PaillierHss,
    PublicKey,
    Share,
    centered,
    ddlog,
    setup,
)
from .oracle import OracleHss, setup_oracle
from .params import HssParams, PROFILES
from .protocol import (
    ClientQuery,
    EncryptedModel,
    FeatureMap,
    MODE_GBDT,
    MODE_PLAIN,
    MODE_VERIFIABLE,
    ServerResponse,
    client_build_query,
    derive_mask_plan,
    feature_map_of,
    provider_encrypt_model,
    reconstruct,
    reconstruct_gbdt,
    server_evaluate,
    sfs,
    verify,
)
from .tree import (
    DecisionTree,
    GbdtModel,
    build_feature_matrix,
    encode_features,
    eval_gbdt_plain,
    eval_plain,
    load_gbdt,
    load_tree,
    pad_complete,
    path_costs_plain,
)

__version__ = "0.1.0"
