from decimal import Decimal

UNKNOWN_BRIDGE = "unknown"
DEFAULT_ACCOUNT_LOOKBACK = 16  # latest incoming transfers per spender on account chains
DEFAULT_BRANCHING_CAP = 64
DEFAULT_ANCESTRY_DEPTH = 3
DEFAULT_VOTE_THRESHOLD = 2
HF_MAX_DELAY_SECONDS = 1800  # "completed within 30 minutes", inclusive
HF_MINI_PER_PAIR = 100
HIT_AT_K = (1, 3, 5, 10, 20, 50)
PRICE_RESOLUTION_SECONDS = 60
UNIT_RATE = Decimal(1)
TRANSFERS_FILE = "transfers.jsonl"
TRUTH_FILE = "truth.jsonl"
MANIFEST_FILE = "manifest.json"
SYBIL_FILE = "sybil.json"
PRICES_DIR = "prices"
SCHEMA_VERSION = 1
API_TITLE = "Cross-chain tracer API"
API_VERSION_HEADER = "API-Version"
