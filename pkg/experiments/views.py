"""
Experiments app views

ViewSet for ExperimentRun: list, retrieve and queue experiment documents.
"""
from rest_framework import status, viewsets
from rest_framework.decorators import action
from rest_framework.permissions import IsAuthenticated
from rest_framework.response import Response

from .models import ExperimentRun
from .serializers import ExperimentRunCreateSerializer, ExperimentRunSerializer
from .tasks import dispatch_experiment_run


class ExperimentRunViewSet(viewsets.ModelViewSet):
    """
    ViewSet for ExperimentRun.

    - POST: Validate an experiment document and queue it
    - GET: List runs, newest first
    - GET {id}: Retrieve a run with its result rows
    - POST {id}/restart/: Queue a copy of a run
    """

    serializer_class = ExperimentRunSerializer
    permission_classes = [IsAuthenticated]
    queryset = ExperimentRun.objects.all()
    http_method_names = ['get', 'post', 'head', 'options']

    def create(self, request, *args, **kwargs):
        create_serializer = ExperimentRunCreateSerializer(data=request.data)
        create_serializer.is_valid(raise_exception=True)

        run = ExperimentRun.objects.create(**create_serializer.validated_data)
        mode = dispatch_experiment_run(run)
        run.refresh_from_db()

        payload = self.get_serializer(run).data
        payload['dispatch'] = mode
        return Response(payload, status=status.HTTP_201_CREATED)

    @action(detail=True, methods=['post'])
    def restart(self, request, pk=None):
        """
        POST /api/runs/{id}/restart/

        Creates a new run from the same document, seed and name.
        """
        original = self.get_object()
        run = ExperimentRun.objects.create(
            name=original.name,
            config_text=original.config_text,
            seed=original.seed,
        )
        mode = dispatch_experiment_run(run)
        run.refresh_from_db()

        payload = self.get_serializer(run).data
        payload['dispatch'] = mode
        return Response(payload, status=status.HTTP_201_CREATED)
