"""
Experiments app serializers

Serializers for ExperimentRun model.
"""
from django.core.exceptions import ValidationError as DjangoValidationError
from rest_framework import serializers

from .config import parse_config
from .models import ExperimentRun


class ExperimentRunSerializer(serializers.ModelSerializer):
    """
    Serializer for ExperimentRun.

    Everything but the name, document, seed and output directory is
    produced by the background task.
    """

    synchronizers = serializers.SerializerMethodField()

    class Meta:
        model = ExperimentRun
        fields = [
            'id',
            'name',
            'config_text',
            'seed',
            'output_dir',
            'status',
            'cell_count',
            'synchronizers',
            'result_rows',
            'written_files',
            'error_message',
            'debug_log',
            'completed_at',
            'created_at',
            'updated_at',
        ]
        read_only_fields = [
            'id',
            'status',
            'cell_count',
            'result_rows',
            'written_files',
            'error_message',
            'debug_log',
            'completed_at',
            'created_at',
            'updated_at',
        ]

    def get_synchronizers(self, obj: ExperimentRun) -> list:
        seen = []
        for row in obj.result_rows or []:
            if row.get('synchronizer') not in seen:
                seen.append(row.get('synchronizer'))
        return seen


class ExperimentRunCreateSerializer(serializers.Serializer):
    """
    Serializer for queueing a new experiment run.

    The document is parsed up front so a bad key is rejected before
    anything is queued.
    """

    name = serializers.CharField(max_length=255, required=False, allow_blank=True)
    config_text = serializers.CharField(allow_blank=True, trim_whitespace=False)
    seed = serializers.IntegerField(required=False, allow_null=True)
    output_dir = serializers.CharField(max_length=500, required=False, allow_blank=True)

    def validate_config_text(self, value: str) -> str:
        try:
            parse_config(value)
        except DjangoValidationError as exc:
            raise serializers.ValidationError(exc.messages)
        return value
