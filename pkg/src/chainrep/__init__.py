"""chainrep: smart-contract reputability analysis toolkit.

Pipeline pieces: EVM bytecode disassembly into opcode categories, learned
category embeddings, class-imbalance augmentation (SMOTE / ADASYN / GAN), a
gradient-boosted classifier over code embeddings, and a convolutional
autoencoder that scores hourly transaction behaviour (optionally fused with
the code embedding) for anomaly-based detection.
"""

__version__ = "0.1.0"
