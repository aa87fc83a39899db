"""
Experiments app models

ExperimentRun records a queued experiment: the document it ran, where its
files went, and the long-format result rows.
"""
from django.db import models


class ExperimentRun(models.Model):
    """
    One execution of an experiment document.

    Runs are created PENDING and picked up by
    ``experiments.tasks.process_experiment_run``, either through django-q or
    inline when the queue is unavailable.
    """

    class Status(models.TextChoices):
        PENDING = 'PENDING', 'Pending'
        PROCESSING = 'PROCESSING', 'Processing'
        COMPLETED = 'COMPLETED', 'Completed'
        FAILED = 'FAILED', 'Failed'

    name = models.CharField(max_length=255, blank=True)
    config_text = models.TextField()

    # Overrides the document seed when set
    seed = models.IntegerField(null=True, blank=True)

    # Empty means FASTSYNC_OUTPUT_ROOT/run-<id>
    output_dir = models.CharField(max_length=500, blank=True)

    cell_count = models.PositiveIntegerField(default=0)
    result_rows = models.JSONField(default=list, blank=True)
    written_files = models.JSONField(default=list, blank=True)
    debug_log = models.TextField(blank=True)
    error_message = models.TextField(blank=True)

    status = models.CharField(
        max_length=20,
        choices=Status.choices,
        default=Status.PENDING,
    )
    completed_at = models.DateTimeField(null=True, blank=True)

    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    def __str__(self):
        return f"Experiment run {self.pk} ({self.name or 'unnamed'}) - {self.status}"

    class Meta:
        verbose_name = 'Experiment Run'
        verbose_name_plural = 'Experiment Runs'
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['status', 'created_at'], name='experiment_status_created_idx'),
        ]
