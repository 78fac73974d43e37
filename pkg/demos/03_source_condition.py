# Deblurring with a source condition: u_dag solves 2 L_h u = A* z, data
# f = A u_dag plus noise with ||n|| = alpha.  The Bregman distance should
# decay like alpha.
from fraclap.experiments import (Schedule, default_source_instance, evaluate_source,
                                 run_source_condition_inversion)

inst = default_source_instance(n=96, omega_width=80, width_cells=2.0, s=0.3, seed=7)
print("u_dag max %.4f, source solve residual %.1e" % (inst.u_dag.values.max(), inst.report.final_residual))

sc = Schedule(alpha0=0.1, rho=0.5, steps=10, noise="h", c=1.0, base_seed=200)
res = evaluate_source(run_source_condition_inversion(inst, sc))
print("  alpha     bregman     1/2|u-u_dag|^2   ||v-A*z||_q   ||f_an-u_dag||_inf")
for r in res.records:
    print(f"  {r['alpha']:.2e}  {r['bregman']:.4e}  {r['bregman_identity']:.4e}     "
          f"{r['subgrad_lq_err']:.4e}    {r['reduction_linf_err']:.4e}")
print("Bregman slope %.3f" % res.fits["bregman"].slope)
for name, chk in sorted(res.checks.items()):
    print(f"{'ok  ' if chk['passed'] else 'FAIL'} {name}")
