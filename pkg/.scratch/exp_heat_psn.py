import time, numpy as np
from psnet.numerics import rng as rngmod
from psnet.sims import heat1d_small_config
from psnet.sims.heat1d import heat1d, heat1d_program, percentile_inputs, make_observations, QueryMuW, mu_w
from psnet.dataset import TraceDataset
from psnet.surrogate import SurrogateModel, SurrogateConfig, PsnTrainConfig, psn_train
from psnet.runtime import PriorController, run_guided

cfg = heat1d_small_config()
qw = QueryMuW.from_config(cfg)

t0=time.time()
traces = [heat1d(rngmod.stream(1,'ds',i), cfg, trace_id=i) for i in range(3000)]
print('gen %.0fs' % (time.time()-t0), flush=True)
ds = TraceDataset.from_traces(traces)
del traces
model = SurrogateModel(SurrogateConfig(hidden=48, addr_embed=24, value_embed=12), init_seed=0, family='heat1d')
t0=time.time()
hist = psn_train(model, ds, PsnTrainConfig(epochs=8, batch_size=200, lr=2.5e-3, seed=0))
print('train %.0fs, NLL per epoch:' % (time.time()-t0), [round(h,1) for h in hist], flush=True)

# (i) conditional-mean fidelity at nominal pins
pins = percentile_inputs(cfg, 0.5); pins['cfg__0'] = 1
n = 300
sim_a = [heat1d(rngmod.stream(3,'eva',i), cfg, pins=pins, trace_id=i) for i in range(n)]
sim_b = [heat1d(rngmod.stream(3,'evb',i), cfg, pins=pins, trace_id=i) for i in range(n)]
psn = model.sample_batch(rngmod.stream(3,'evp'), n, t_max=2000, pins=pins)
def stats(traces):
    M = cfg.n_record
    out = {}
    for ch in ('Tint','Tbot'):
        arr = np.empty((len(traces), M))
        for i,tr in enumerate(traces):
            vals = {e.addr: e.value for e in tr.entries}
            arr[i] = [vals[f'{ch}__{m}'] for m in range(M)]
        out[ch] = (arr.mean(0), arr.var(0))
    return out
sa, sb, sp = stats(sim_a), stats(sim_b), stats(psn)
for ch in ('Tint','Tbot'):
    err = (sp[ch][0]-sa[ch][0])**2
    ctl = (sb[ch][0]-sa[ch][0])**2
    print('%s: err q50=%.4f q90=%.4f q99=%.4f max=%.4f | ctl q90=%.5f q99=%.5f' % (
        ch, *np.percentile(err,[50,90,99]), err.max(), *np.percentile(ctl,[90,99])), flush=True)

# (ii) posterior check: GT vs PSN+prior at median regime, K=600
obs, _ = make_observations(cfg, rngmod.stream(99,'obsgen',5), pins=percentile_inputs(cfg, 0.5))
def post(run, K, seed):
    lws = np.empty(K); mus = np.empty(K)
    for k in range(K):
        rng = rngmod.stream(seed,'p',k)
        tr, lp, lq = run(rng, k)
        lws[k] = lp-lq; mus[k] = mu_w(tr, qw)
    w = np.exp(lws-lws.max()); wn=w/w.sum()
    se_boot = np.empty(300); g = rngmod.stream(7,'b')
    for i in range(300):
        idx = g.integers(0,K,K); wi=w[idx]; se_boot[i]=(wi*mus[idx]).sum()/wi.sum()
    return (wn*mus).sum(), se_boot.std(ddof=1), 1.0/(wn**2).sum()
t0=time.time()
gt = post(lambda rng,k: run_guided(heat1d_program(cfg), PriorController(rng), obs, t_max=2000, trace_id=k), 600, 11)
print('GT      : mu=%.3f se=%.3f ess=%.0f (%.0fs)' % (*gt, time.time()-t0), flush=True)
t0=time.time()
pp = post(lambda rng,k: model.run_guided(PriorController(rng), obs, rng, t_max=2000, trace_id=k), 600, 12)
print('PSN+self: mu=%.3f se=%.3f ess=%.0f (%.0fs)' % (*pp, time.time()-t0), flush=True)
print('diff=%.3f vs 2*combSE=%.3f' % (abs(gt[0]-pp[0]), 2*np.hypot(gt[1],pp[1])), flush=True)
