"""Multi-task recognition trained against a label-combination discriminator.

A small numpy library: a float64 reverse-mode autodiff core, a shared-trunk
multi-task recognizer paired with a binary discriminator over label
combinations, the supervised and adversarial objectives, an alternating
minibatch trainer, synthetic structured-label worlds with a known joint
distribution, and the evaluation metrics (NME / MAE / accuracy plus a
discretized label-combination JS divergence).
"""

from .adversary import (
    assemble_combo,
    combo_width,
    loss_adv_recognizer,
    loss_discriminator,
    loss_recognizer_total,
    slice_combo,
    subset_fields,
)
from .errors import (
    CheckpointFormatError,
    CheckpointIntegrityError,
    ConfigurationError,
    ContractViolationError,
    DimensionError,
    MtalError,
    NumericError,
    TrainingAbortError,
    UndefinedMetricError,
)
from .losses import (
    LabelBundle,
    LossWeights,
    bundle_values,
    loss_attributes,
    loss_gender,
    loss_landmark,
    loss_pose_continuous,
    loss_pose_discrete,
    loss_supervised,
    loss_visibility,
)
from .metrics import (
    ComboGrid,
    MetricsReport,
    accuracy,
    build_report,
    discretize_combo,
    js_divergence,
    js_divergence_pmf,
    mae,
    nme,
    pose_degree_error,
)
from .models import Discriminator, Recognizer
from .synthgen import (
    Dataset,
    Sample,
    WorldSpec,
    default_attribute_world,
    default_landmark_world,
    generate,
    generate_attribute_world,
    generate_landmark_world,
    split,
)
from .tensor import (
    SGD,
    Tape,
    Tensor,
    backward,
    gradient_check,
    sgd_step,
    zero_grads,
)
from .trainer import (
    TrainConfig,
    TrainLog,
    train,
    update_discriminator_step,
    update_recognizer_step,
)

__version__ = "0.1.0"
