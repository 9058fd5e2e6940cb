"""Expert-retrieval stance detection pipeline.

Stages: generate candidate expert personas for labeled train sentences via
a completion model, filter the experienced ones by occurrence count and
prediction accuracy, index sentence-expert pairs by embedding, retrieve
related experts for new sentences, and render multi-expert discussion
prompts whose final stance lines are scored with per-target F1.
"""

from .backend import (
    BackendError,
    CompletionClient,
    CompletionRequest,
    CompletionResponse,
    LiveBackend,
    MockBackend,
    ResponseCache,
    cache_key,
)
from .config import RunConfig, apply_overrides, load_run_config
from .corpus import (
    Corpus,
    CorpusError,
    Instance,
    StanceLabel,
    load_corpus,
    parse_label,
    save_corpus,
    split_view,
)
from .encoder import Embedding, HashingEncoder, RemoteEncoder, similarity_distribution
from .evaluation import EvalReport, bias_subset_report, evaluate_run, f1_avg
from .expertfilter import (
    ExpertPool,
    ExpertStats,
    compute_stats,
    experts_by_sentence,
    filter_pool,
    sweep_thresholds,
)
from .expertgen import (
    DemonstrationSpec,
    ExpertName,
    GenerationRecord,
    canonical_expert_name,
    generate_records,
    parse_stage1_response,
    render_stage1_prompt,
    select_demonstrations,
)
from .inference import (
    InferenceConfig,
    Prediction,
    majority_vote,
    parse_inference_response,
    predict,
    predict_batch,
    render_inference_prompt,
)
from .repository import (
    Repository,
    RetrievalResult,
    build_repository,
    load_repository,
    retrieve_by_embedding,
    retrieve_experts,
    save_repository,
)

__version__ = "0.1.0"
