# config.py
# Configuration file for lattice rescoring defaults
# Edit these values to change the defaults used by the CLI, the dashboard
# and the tools/ scripts. Command-line flags override them per run.

# ============================================
# RESERVED TOKENS
# ============================================
# Structural tokens never reach an LM scorer. <eps> arcs are only legal as
# cost-only final transitions and are folded away while parsing.
EPS = "<eps>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
STRUCTURAL_TOKENS = frozenset({EPS, BOS, EOS})

# ============================================
# LATTICE HANDLING
# ============================================
# Costs are negative natural-log probabilities (nats).
DEFAULT_NUM_FRAMES = 1

# Two costs closer than this (relative to max(1, |cost|)) are a tie; ties
# are broken by lexicographic word sequence, then by smallest state id.
TIE_TOLERANCE = 1e-9

# enumerate_paths refuses to list more than this many paths by default
DEFAULT_PATH_LIMIT = 10000

# ============================================
# RESCORING DEFAULTS
# ============================================
DEFAULT_BEAM = 8.0               # nats, applied before expansion
DEFAULT_EPSILON = 0.5            # posterior threshold for expansion
DEFAULT_POSTERIOR_SEMIRING = "sum"
DEFAULT_EXPANSION_METHOD = "posterior"
DEFAULT_NGRAM_ORDER = 3
DEFAULT_ESTIMATION = "semi-viterbi"
DEFAULT_LAMBDA = 0.8             # weight on the neural LM
DEFAULT_NBEST = 20
DEFAULT_STRATEGY = "non-iterative"

# Worker threads used to rescore an archive (one lattice per task)
DEFAULT_WORKERS = 4

# ============================================
# BUILT-IN SCORERS
# ============================================
UNIFORM_VOCAB_SIZE = 10000

# Hash scorer: cost = stable hash of (history window, word) mapped onto
# [HASH_COST_MIN, HASH_COST_MAX] nats.
HASH_COST_MIN = 0.5
HASH_COST_MAX = 10.0
HASH_HISTORY_WINDOW = 8

# External scorer (exec:CMD) - line-delimited JSON over stdin/stdout
EXEC_STARTUP_TIMEOUT = 30   # seconds to wait for the ready handshake
EXEC_RESPONSE_TIMEOUT = 60  # seconds of silence tolerated while a batch is pending

# Remote scorer (http:URL) - one POST per batch
HTTP_SCORER_TIMEOUT = 60    # seconds

# Responses may carry tiny negative costs from float round-off
SCORER_COST_TOLERANCE = 1e-6

# ============================================
# LATTICE GENERATOR
# ============================================
# Profile bounds for synthetic lattices (desk-scale stand-in for
# first-pass decoder output).
GENERATOR_MAX_STATES = 200
GENERATOR_MAX_BRANCHING = 4
DEFAULT_PROFILE = {
    "num_states": 10,
    "branching": 3,
    "vocab_size": 50,
    "cost_noise": 1.0,
    "max_span": 3,
}

# ============================================
# BENCHMARK SWEEP
# ============================================
BENCH_EPSILONS = (0.5, 0.1, 0.05, 0.005)
BENCH_NGRAM_ORDERS = (2, 3, 4)
SIGN_TEST_ALPHA = 0.05

# ============================================
# LOGGING
# ============================================
LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
LOG_LEVEL = "INFO"
LOG_LEVEL_ENV = "LATTICE_RESCORE_LOG_LEVEL"

# ============================================
# DATABASE CONFIGURATION
# ============================================
DATABASE_NAME = "lattice_rescore.db"
BENCH_TABLE = "bench_results"
RESCORE_TABLE = "rescore_runs"
