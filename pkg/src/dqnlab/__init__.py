"""dqnlab: a Double-DQN laboratory for classic-control tasks.

Train greedy or epsilon-greedy DDQN agents on MountainCar, CartPole and
Acrobot with small dense Q-networks, reproduce multi-seed reward grids and
architecture ablations, and inspect the learned behavior through
phase-space histograms, transition windows, and vector-field diagnostics.
"""

__version__ = "0.1.0"
