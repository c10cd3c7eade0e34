class OutputFiles:
    """Fixed file names written under --out-dir"""

    # synth
    TAXONOMY = "taxonomy.tsv"
    TAXONOMY_TREE = "taxonomy_tree.txt"
    TRAIN = "train.csv"
    VAL = "val.csv"
    TEST = "test.csv"
    SPLITS = "splits.csv"

    # train
    CHECKPOINT = "checkpoint.npz"
    TRAIN_LOG = "train_log.csv"

    # calibrate / predict / eval
    GAMMA = "gamma.txt"
    PREDICTIONS = "predictions.csv"
    METRICS_TEXT = "metrics.txt"
    METRICS_JSON = "metrics.json"

    # compare / ablate
    REPORT_TEXT = "report_{baseline}.txt"
    REPORT_JSON = "report_{baseline}.json"
    REPORT_PREDICTIONS = "predictions_{baseline}.csv"
    REJECTION_TABLE = "rejection_table.csv"
    ABLATION_TABLE = "ablation.csv"

    # every command
    CONFIG_ECHO = "config_used.yaml"
    RUN_LOG = "run.log"
