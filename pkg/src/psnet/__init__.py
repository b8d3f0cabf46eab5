"""Trace-level neural surrogates for stochastic simulators.

The package splits into: a small numerics kernel (tape autodiff, LSTM,
Adam, distributions, counter-based RNG streams), a probabilistic-program
runtime built on a suspend/resume contract, an autoregressive surrogate
over (address, value) sequences, an amortized proposal network with a
sequential importance sampler, benchmark simulators, and a batch CLI.
"""

from . import numerics, sims
from .dataset import TraceDataset
from .inference import (
    SimExecutor,
    SurrogateExecutor,
    WeightedSample,
    bootstrap_se,
    ess,
    ic_proposal,
    posterior_expectation,
    prior_proposal,
    sis_infer,
)
from .proposal import (
    IcController,
    IcTrainConfig,
    ProposalConfig,
    ProposalModel,
    ic_train,
    load_proposal,
    observation_vector,
    propose,
    save_proposal,
)
from .runtime import (
    Controller,
    PinnedController,
    PriorController,
    SiteRequest,
    run_guided,
    run_prior,
)
from .surrogate import (
    PsnTrainConfig,
    SurrogateConfig,
    SurrogateModel,
    load_surrogate,
    psn_logprob,
    psn_sample,
    psn_train,
    run_guided_surrogate,
    save_surrogate,
)
from .traces import (
    Address,
    Trace,
    TraceEntry,
    iter_traces,
    load_traces,
    save_traces,
    trace_logjoint,
)

__version__ = "0.1.0"
