from unittest import mock

from django.contrib.auth import get_user_model
from django.test import TestCase
from django.urls import reverse
from rest_framework import status
from rest_framework.test import APIClient

from experiments.models import ExperimentRun

DOCUMENT = "n_workers: 5\nrounds: 3\nruns: 2\nsynchronizer: bsp\n"


@mock.patch('experiments.tasks.async_task', return_value='task-1')
class ExperimentRunApiTests(TestCase):
    def setUp(self) -> None:
        self.user = get_user_model().objects.create_user(username='researcher', password='not-used-1234')
        self.client = APIClient()
        self.client.force_authenticate(user=self.user)

    def test_create_queues_valid_document(self, mock_async) -> None:
        response = self.client.post(
            reverse('experiment-run-list'),
            {'name': 'bsp baseline', 'config_text': DOCUMENT, 'seed': 3},
            format='json',
        )

        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertEqual(response.data['dispatch'], 'queued')
        self.assertEqual(response.data['status'], ExperimentRun.Status.PENDING)
        self.assertEqual(response.data['seed'], 3)
        run = ExperimentRun.objects.get(pk=response.data['id'])
        mock_async.assert_called_once_with('experiments.tasks.process_experiment_run', run.id)

    def test_create_rejects_invalid_document(self, mock_async) -> None:
        response = self.client.post(
            reverse('experiment-run-list'),
            {'config_text': "n_workers: 1\n"},
            format='json',
        )

        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn("line 1: n_workers must be >= 2, got 1", response.data['config_text'])
        self.assertFalse(ExperimentRun.objects.exists())
        mock_async.assert_not_called()

    def test_list_and_retrieve(self, mock_async) -> None:
        run = ExperimentRun.objects.create(
            name='done',
            config_text=DOCUMENT,
            status=ExperimentRun.Status.COMPLETED,
            result_rows=[
                {'cell': 'base', 'synchronizer': 'bsp', 'metric': 'participation', 'mean': 1.0},
                {'cell': 'base', 'synchronizer': 'ssp:3', 'metric': 'participation', 'mean': 0.8},
            ],
        )

        listing = self.client.get(reverse('experiment-run-list'))
        detail = self.client.get(reverse('experiment-run-detail', args=[run.id]))

        self.assertEqual(listing.status_code, status.HTTP_200_OK)
        self.assertEqual(listing.data['count'], 1)
        self.assertEqual(detail.data['synchronizers'], ['bsp', 'ssp:3'])

    def test_restart_copies_document(self, mock_async) -> None:
        original = ExperimentRun.objects.create(
            name='first', config_text=DOCUMENT, seed=5, status=ExperimentRun.Status.FAILED
        )

        response = self.client.post(reverse('experiment-run-restart', args=[original.id]))

        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertNotEqual(response.data['id'], original.id)
        copy = ExperimentRun.objects.get(pk=response.data['id'])
        self.assertEqual((copy.config_text, copy.seed, copy.name), (DOCUMENT, 5, 'first'))

    def test_requires_authentication(self, mock_async) -> None:
        response = APIClient().get(reverse('experiment-run-list'))

        self.assertIn(response.status_code, (status.HTTP_401_UNAUTHORIZED, status.HTTP_403_FORBIDDEN))
