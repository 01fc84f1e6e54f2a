from .linalg import make_rng, matmul, ridge_solve, kmeans, svd_square, hungarian_max
from .partition import (PartitionSpec, Dendrogram, naive_partition, opq_fit, opq_partition,
                        permutation_from_rotation, corr_squared, agglomerate, leaf_order,
                        r2_partition, make_partition)
from .encoder import (HashTree, PqEncoder, Encoding, learn_hash_tree, encode_tree, learn_pq,
                      encode_all, learn_encoders)
from .table import (FitConfig, PrototypeSet, LookupTable, AmmOperator, optimize_prototypes,
                    build_lut, optimize_lut, quantize_lut, amm_apply, lac_cost_model,
                    storage_bytes, fit_operator)
