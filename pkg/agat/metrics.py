import datetime
import logging
import time
import torch

from collections import defaultdict, deque


logger = logging.getLogger(__name__)


class SmoothedValue:
    """A running meter: the last `window_size` values plus a count-weighted total."""

    def __init__(self, window_size: int = 20, fmt: str = "{median:.4f} ({global_avg:.4f})"):
        self.window = deque(maxlen=window_size)
        self.total = 0.0
        self.count = 0
        self.fmt = fmt

    def update(self, value: float, n: int = 1) -> None:
        self.window.append(value)
        self.count += n
        self.total += value * n

    @property
    def median(self) -> float:
        return torch.tensor(list(self.window), dtype=torch.float64).median().item()

    @property
    def avg(self) -> float:
        return torch.tensor(list(self.window), dtype=torch.float64).mean().item()

    @property
    def global_avg(self) -> float:
        return self.total / self.count if self.count else 0.0

    @property
    def value(self) -> float:
        return self.window[-1]

    def __str__(self):
        if not self.window:
            return "-"
        return self.fmt.format(median=self.median, avg=self.avg, global_avg=self.global_avg, value=self.value)


class MetricLogger:
    def __init__(self, delimiter="  "):
        self.meters = defaultdict(SmoothedValue)
        self.delimiter = delimiter

    def update(self, n=1, **kwargs):
        for k, v in kwargs.items():
            if isinstance(v, torch.Tensor):
                v = v.item()
            if not isinstance(v, (float, int)):
                raise TypeError(f"meter '{k}' expects a number, got {type(v).__name__}")
            self.meters[k].update(v, n=n)

    def __getattr__(self, attr):
        if attr in self.meters:
            return self.meters[attr]
        if attr in self.__dict__:
            return self.__dict__[attr]
        raise AttributeError(f"'{type(self).__name__}' object has no attribute '{attr}'")

    def __str__(self):
        return self.delimiter.join(f"{name}: {meter}" for name, meter in self.meters.items())

    def add_meter(self, name, meter):
        self.meters[name] = meter

    def log_every(self, iterable, print_freq, header=None):
        """Yield from `iterable`, logging meters every `print_freq` items and at the end."""
        header = header or ""
        total = len(iterable)
        start_time = time.time()
        end = time.time()
        iter_time = SmoothedValue(fmt="{avg:.4f}")
        space_fmt = ":" + str(len(str(total))) + "d"
        log_msg = self.delimiter.join([header, "[{0" + space_fmt + "}/{1}]", "eta: {eta}", "{meters}", "time: {time}"])

        for i, obj in enumerate(iterable):
            yield obj
            iter_time.update(time.time() - end)
            if i % print_freq == 0 or i == total - 1:
                eta_seconds = iter_time.global_avg * (total - i)
                eta_string = str(datetime.timedelta(seconds=int(eta_seconds)))
                logger.info(log_msg.format(i, total, eta=eta_string, meters=str(self), time=str(iter_time)))
            end = time.time()

        total_time = time.time() - start_time
        if total:
            logger.info(
                f"{header} Total time: {datetime.timedelta(seconds=int(total_time))} ({total_time / total:.4f} s / it)"
            )

