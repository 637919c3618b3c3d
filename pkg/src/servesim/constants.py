"""Published architecture and device constants used by the built-in presets.

Every entry carries the source it was transcribed from. Values flagged
"uncalibrated" are reasonable placeholders, not measurements.
"""

# Decoder shapes -------------------------------------------------------------

MODELS = {
    # meta-llama/Llama-2-7b-hf config.json: num_hidden_layers=32,
    # hidden_size=4096, num_attention_heads=32, num_key_value_heads=32,
    # intermediate_size=11008, vocab_size=32000, SwiGLU MLP (gated).
    "llama2-7b": dict(
        num_layers=32,
        hidden_dim=4096,
        num_heads=32,
        num_kv_heads=32,
        head_dim=128,
        ffn_dim=11008,
        vocab_size=32000,
        gated_mlp=True,
        dtype_bytes=2,
    ),
    # facebook/opt-13b config.json: num_hidden_layers=40, hidden_size=5120,
    # num_attention_heads=40, ffn_dim=20480, vocab_size=50272, ReLU MLP.
    "opt-13b": dict(
        num_layers=40,
        hidden_dim=5120,
        num_heads=40,
        num_kv_heads=40,
        head_dim=128,
        ffn_dim=20480,
        vocab_size=50272,
        gated_mlp=False,
        dtype_bytes=2,
    ),
}

# Published parameter counts, used only as test oracles.
PUBLISHED_PARAMS = {
    "llama2-7b": 6.74e9,  # Llama 2 model card, "7B" row (6,738,415,616)
    "opt-13b": 12.85e9,  # OPT model release (Zhang et al. 2022), Table 1 "13B"
}

# Devices --------------------------------------------------------------------

HARDWARE = {
    # NVIDIA A100 80GB SXM datasheet: 312 TFLOPS dense FP16 tensor,
    # 2,039 GB/s HBM2e, 80 GB.
    "a100": dict(peak_flops=312e12, mem_bandwidth=2.039e12, mem_capacity=80e9),
    # Same part with a quarter of the tensor throughput.
    "a100-quarter-flops": dict(
        peak_flops=78e12, mem_bandwidth=2.039e12, mem_capacity=80e9
    ),
    # NVIDIA V100 SXM2 32GB datasheet: 125 TFLOPS tensor, 900 GB/s, 32 GB.
    "v100": dict(peak_flops=125e12, mem_bandwidth=900e9, mem_capacity=32e9),
    # SK hynix GDDR6-AiM: 1 TFLOPS and 0.5 TB/s in-bank bandwidth per chip
    # (ISSCC 2022 disclosure). The card-level aggregate assumes 32 chips of
    # 1 GB each; the chip count is our assumption, not a datasheet value.
    "gddr6-aim": dict(peak_flops=32e12, mem_bandwidth=16e12, mem_capacity=32e9),
}

# Interconnect defaults (uncalibrated).
# PCIe 4.0 x16 is ~32 GB/s per direction; NVLink 3 on A100 is 600 GB/s total,
# of which we assume a third is reachable for one point-to-point stream.
HOST_LINK_BANDWIDTH = 32e9
HOST_LINK_LATENCY_NS = 10_000
DEVICE_LINK_BANDWIDTH = 200e9
DEVICE_LINK_LATENCY_NS = 5_000
