# End to end on the synthetic cross-modal set: train, build the classifier set,
# fit the softmax classifier, evaluate.  Pass an epoch count to shorten the run.
import sys

from acmr.data import SyntheticSpec, generate_synthetic
from acmr.evaluation import evaluate_gzsl
from acmr.trainer import TrainConfig, train_pipeline

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100

ds = generate_synthetic(SyntheticSpec(seed=0))
print(f"{ds.visual.shape[0]} images, {ds.num_classes} classes "
      f"({len(ds.seen_classes)} seen / {len(ds.unseen_classes)} unseen)")


def show(epoch, model, rec):
    if epoch % 10 == 0 or epoch == epochs - 1:
        print(f"epoch {epoch:3d}  total {rec['total']:9.3f}  rec {rec['rec']:7.3f}  ma {rec['ma']:6.3f}  "
              f"rep {rec['rep']:6.3f}  iem {rec['iem']:6.3f}  beta {rec['beta']:4.2f}  "
              f"lambda {rec['lambda']:6.1f}  active {rec['active_units']}")


model, history = train_pipeline(ds, TrainConfig(seed=0, epochs=epochs), on_epoch=show)
m = evaluate_gzsl(model, None, ds)
print(f"ACA unseen {m.aca_u:.3f}  ACA seen {m.aca_s:.3f}  H {m.h:.3f}")
