"""Grammar-generic program synthesis on syntax trees: mutation noising,
reverse edit paths, graphics DSL rendering, and value-guided search."""

__version__ = "0.1.0"

from .envs import ENV_NAMES, Environment, load_environment
from .grammar import (
    END_TOKEN,
    AmbiguityError,
    Grammar,
    GrammarError,
    Leaf,
    Node,
    ParseError,
    SampleError,
    SyntaxTree,
    TokenSeq,
    constrained_sample,
    enumerate_trees,
    legal_continuations,
    load_grammar,
    parse,
    pretty,
    sample_unconstrained,
    serialize,
    sigma,
    text_form,
    tokenize,
)
from .mutation import (
    SIGMA_SMALL,
    Mutation,
    MutationError,
    NoiseChain,
    apply_mutation,
    candidate_nodes,
    candidate_sites,
    noise_chain,
    sample_mutation,
    sample_mutation_balanced,
)
from .policies import (
    EditProposal,
    HillClimbPolicy,
    OraclePolicy,
    OracleValue,
    PixelValue,
    PolicyError,
    PolicyQuery,
    ValueQuery,
    oracle_value,
    pixel_value,
)
from .render import iou, load_png, pixel_match_fraction, png_bytes, render_csg2d, render_tinysvg, save_png
from .search import SearchConfig, SearchNode, SearchResult, beam_search, rollout, solve_hillclimb
from .sketch import sketch_render
from .treepath import EditPath, PathError, edit_distance, first_step, full_path, mismatch_weight
