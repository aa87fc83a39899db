from django.contrib import admin

from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    """Admin interface for ExperimentRun."""

    list_display = [
        'id',
        'name',
        'status',
        'cell_count',
        'seed',
        'created_at',
        'completed_at',
    ]
    list_filter = ['status', 'created_at']
    search_fields = ['name', 'config_text', 'output_dir']
    readonly_fields = [
        'created_at',
        'updated_at',
        'completed_at',
        'cell_count',
        'result_rows',
        'written_files',
    ]

    fieldsets = (
        ('Run Info', {
            'fields': ('name', 'status', 'seed', 'output_dir', 'completed_at')
        }),
        ('Experiment Document', {
            'fields': ('config_text',),
        }),
        ('Results', {
            'fields': ('cell_count', 'written_files', 'result_rows', 'debug_log', 'error_message'),
            'classes': ('collapse',)
        }),
        ('Metadata', {
            'fields': ('created_at', 'updated_at')
        }),
    )
