"""Text-to-motion toolkit for a humanoid robot: kinematics and retargeting,
feasibility filtering, discrete motion tokenization (FSQ / VQ), and
autoregressive text-conditioned generation, with evaluation metrics."""

__version__ = "0.1.0"
