"""Constraint compilation into tractable circuits, exact constraint
probabilities and gradients, and neighborhood-based losses for sequence
models.
"""

from .formula import (Assignment, CategoricalSpace, Formula, banned_patterns,
                      choose_k, evaluate, exactly_one, grid_path,
                      latin_square, make_template, parse_dimacs, to_dimacs)
from .circuit import (Circuit, check_properties, enumerate_models,
                      model_count, read_nnf, write_nnf)
from .compiler import VarOrder, compile_formula, smooth
from .wmc import WeightMap, grad_log_wmc, log_wmc, log_wmc_batch, \
    semantic_loss
from .pseudo import (ConditionalTable, PslConfig, PslResult,
                     conditionals_from_joints, expand_neighborhood,
                     pseudo_loglik, pseudo_semantic_loss, restrict_top_k,
                     table_from_model, weights_from_table)
from .models import (FactorizedModel, MarkovARModel, SequenceModel,
                     TrainConfig, TrainExample, read_model, train_toy,
                     write_model)
from .fidelity import (FidelityReport, entropy_model_exact, entropy_product,
                       fidelity_report, kl_local)

__version__ = "0.1.0"
