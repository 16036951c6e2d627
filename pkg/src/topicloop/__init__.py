"""Topic modeling with collapsed Gibbs LDA and LLM-in-the-loop stages.

The pipeline: build a corpus, pick an initialization (random, embedding
clusters, or LLM-filtered clusters), run Gibbs sweeps, score perplexity and
NPMI coherence, and optionally post-correct the learned topics with an LLM
judge. Everything is seeded and reproducible; a deterministic mock transport
stands in for the LLM wherever needed.
"""

from .corpus import (
    CooccurrenceIndex,
    Corpus,
    Document,
    Vocabulary,
    build_cooccurrence,
    build_corpus,
    load_bundle,
    load_jsonl,
    load_stopwords,
    save_bundle,
)
from .errors import (
    DataError,
    ResponseParseError,
    TopicloopError,
    TransportError,
    ValidationError,
)
from .experiment import (
    ExperimentConfig,
    GridResult,
    SyntheticSpec,
    generate_synthetic,
    match_topics,
    run_grid,
)
from .initializers import (
    ClusterSet,
    WordEmbedding,
    cluster_init,
    embed_vocabulary,
    kmeans_cluster,
    llm_guided_init,
    random_init,
)
from .llm import (
    ChatExchange,
    HttpTransport,
    LlmClient,
    MockTransport,
    PromptTemplate,
    Verdict,
    get_template,
    pairwise_similarity_score,
    parse_verdict,
    render_prompt,
)
from .metrics import (
    MetricReport,
    corpus_perplexity,
    descent_rate,
    entropy_perplexity,
    npmi,
    pmi,
    topic_coherence,
)
from .post_correction import CorrectionRecord, CorrectionSummary, correct_model, correct_topic
from .sampler import (
    Hyperparams,
    SamplerState,
    TopicModel,
    conditional_distribution,
    estimate,
    gibbs_pass,
    init_state,
    load_checkpoint,
    save_checkpoint,
    top_words,
)

__version__ = "0.1.0"
