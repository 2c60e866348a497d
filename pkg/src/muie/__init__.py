"""Grounded multimodal universal information extraction toolkit.

Parses structured meta-responses from generative models, orchestrates
pluggable extraction/grounding backends over a json-lines wire protocol,
and scores grounded IE predictions: span micro-F1, Hungarian-matched mask
mIoU, per-frame video Jaccard, and 1D audio span IoU.
"""

from .assignment import CostMatrix, Matching, hungarian, match_mask_sets, match_span_sets, match_tracklet_sets
from .geometry import (
    DenseMask,
    bce_loss,
    dice_coefficient,
    dice_loss,
    mask_iou,
    rle_decode,
    rle_encode,
    span_iou_1d,
    tracklet_iou_profile,
)
from .metaresponse import (
    MetaResponse,
    ModuleCall,
    ParseError,
    PromptSpec,
    build_prompt,
    link_groundings,
    parse_meta_response,
    render_meta_response,
)
from .model import (
    Alignment,
    AudioSegment,
    EntityMention,
    EventArgument,
    EventRecord,
    GoldAnnotation,
    GroundingRef,
    ImageMask,
    MediaRef,
    Modality,
    ModalityBundle,
    ModelError,
    PredictionSet,
    RelationTriple,
    Task,
    Tracklet,
    normalize_mention,
)
from .scoring import (
    PRF,
    GroundingScore,
    ScoreReport,
    ScoringOptions,
    aggregate,
    render_report,
    score_audio_segmentation,
    score_event_argument,
    score_event_trigger,
    score_image_grounding,
    score_ner,
    score_re,
    score_video_tracking,
)

__version__ = "0.1.0"
