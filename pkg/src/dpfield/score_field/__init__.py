from .config import ARCHITECTURES, ScoreFieldConfig
from .layers import cross_attention, mixer_block, self_attention_block
from .network import ScoreField, embed_features, init_params, parameter_shapes, score_eval
