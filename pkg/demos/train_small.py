"""Train one small model on the synthetic scenario and score it under noise.

Takes about a minute on a laptop CPU.
Run: python3 demos/train_small.py
"""

from ttmkit.evalkit import evaluate
from ttmkit.model import ModelConfig, TTMModel
from ttmkit.scenario import ScenarioConfig, generate
from ttmkit.train import TrainConfig, fit, noisy_mels, prepare

sc = ScenarioConfig(seed=0)
data = {k: prepare(v) for k, v in generate(sc).items()}
print("train positives: %.2f  missing head crops: %.2f"
      % (data["train"].labels.mean(), 1 - data["train"].present.mean()))

model = TTMModel(ModelConfig(prompt_mode="fine"), seed=0)
out = fit(model, data["train"], data["val"], TrainConfig(epochs=8),
          log=lambda s: print(f"epoch {s['epoch']}: loss {s['loss']:.4f}  val mAP {s['val_map']:.3f}"))
print("best epoch:", out["best_epoch"])

test = data["test"]
print("clean   ", evaluate(model, test))
for snr in (10.0, 0.0, -10.0):
    print(f"{snr:+5.0f} dB", evaluate(model, test, noisy_mels(test, snr, seed=1234)))
