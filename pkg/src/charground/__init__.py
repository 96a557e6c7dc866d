"""charground: grounding characters to places in narrative text.

The pipeline: extract character/place candidate pairs from entity-tagged
documents, label them under a four-task schema (validity, spatial relation,
temporal span, narrative tense), train feedforward softmax classifiers over
concatenated span embeddings, and aggregate the resulting grounding
predictions into character mobility and indoor-proclivity analyses.
"""

from .corpus import (
    CandidatePair,
    Document,
    EntityMention,
    Token,
    context_window,
    extract_candidate_pairs,
    load_corpus,
)
from .annotation import (
    AnnotationRecord,
    NarrativeTense,
    SpatialRel,
    TemporalSpan,
    Validity,
    adjudicate,
    cohen_kappa,
    label_distribution,
)
from .embeddings import (
    EmbeddingTable,
    HashEmbeddingProvider,
    WindowEmbedding,
    load_embeddings,
    mean_pool,
    pair_feature,
    write_embeddings,
)
from .classifier import (
    Dataset,
    MLPParams,
    SplitSpec,
    TrainConfig,
    TrainedModel,
    cross_entropy,
    forward,
    gradients,
    grid_search,
    load_model,
    predict,
    save_model,
    train,
)
from .evaluation import (
    EvalReport,
    accuracy,
    learning_curve,
    majority_baseline,
    per_class_prf,
)
from .analysis import (
    CharacterProfile,
    Gender,
    GroundingPrediction,
    MobilityReport,
    PlaceKind,
    ProclivityReport,
    build_place_lexicon,
    gender_stratified_mobility,
    indoor_proclivity,
    mobility,
    protagonist_mobility_experiment,
    temporal_slice_proclivity,
    wald_half_width,
)

__version__ = "0.1.0"
