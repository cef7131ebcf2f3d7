"""Evidence-growth computations for sequential testing of i.i.d. composite
nulls on finite alphabets: projection values and their dual certificates,
robust growth values, blockwise test supermartingales, and power-one
sequential tests, with brute-force oracles at desk scale."""

from .measures import (
    Alphabet,
    BINARY,
    FinitePmf,
    NullInstance,
    RngStream,
    TypeClass,
    bernoulli,
    binary_kl,
    empirical_pmf,
    enumerate_types,
    instance_from_dict,
    instance_to_dict,
    kl_divergence,
    load_instance,
    pmf,
    point_mass,
    sample_iid,
    save_instance,
    sequence_log_prob,
    tv_distance,
    type_table,
)
from .epower import (
    DualAscentResult,
    EVariableTable,
    GrowReport,
    MixtureOfProducts,
    RateReport,
    SolveReport,
    dual_ascent,
    dual_lower_bound,
    epower_of,
    gro_evariable,
    grow_bruteforce_oracle,
    grow_solve,
    klinf,
    rate_table,
    ripr_solve,
    tv_to_hull,
    worst_case_an,
)
from .processes import (
    BlockEProcess,
    BlockSchedule,
    HalfSpace,
    PeekingError,
    TrajectoryLog,
    TvBall,
    TypicalSetConfig,
    cover_and_mix_process,
    csiszar_bound_check,
    fixed_region_process,
    inf_phi_over_region,
    peeking_example,
    peeking_example_value,
    radius_for_level,
    repeated_block_process,
    simulate,
    supermartingale_check,
    typical_region,
    typical_set_process,
    z_lambda_process,
    zero_lift,
)
from .seqtest import (
    Certificate,
    SequentialTest,
    TestOutcome,
    UnionSequentialTest,
    alpha_spending_union,
    estimate_level_power,
    exact_stop_probability,
    power_one_test_from_membership,
    testability_certificate,
    tune_lambda,
    ville_test,
)
from .gallery import (
    GalleryEntry,
    bernoulli_band_instance,
    dirac_pair_instance,
    gallery_entry,
    gallery_names,
    oscillating_density_instance,
    shrinking_bernoulli_alternatives,
    shrinking_support_instance,
    two_point_instance,
)

__version__ = "0.1.0"

